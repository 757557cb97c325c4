use std::io::{Read, Write};

use super::HalError;

/// Where a serial port's inbound bytes come from.
#[derive(Debug)]
pub enum IoInput {
    /// A fixed byte string, consumed front to back.
    Buffer { data: Vec<u8>, pos: usize },
    /// The host process's standard input.
    Stdin,
}

impl IoInput {
    pub fn buffer(data: Vec<u8>) -> Self {
        IoInput::Buffer { data, pos: 0 }
    }

    pub fn empty() -> Self {
        IoInput::buffer(Vec::new())
    }
}

/// Where a serial port's outbound bytes go.
#[derive(Debug)]
pub enum IoOutput {
    Capture(Vec<u8>),
    Stdout,
    Discard,
}

impl IoOutput {
    pub fn capture() -> Self {
        IoOutput::Capture(Vec::new())
    }
}

#[derive(Debug)]
pub struct IoPort {
    input: IoInput,
    output: IoOutput,
}

impl IoPort {
    pub fn new(input: IoInput, output: IoOutput) -> Self {
        IoPort { input, output }
    }

    pub fn write(&mut self, bytes: &[u8]) -> Result<usize, HalError> {
        match &mut self.output {
            IoOutput::Capture(buf) => buf.extend_from_slice(bytes),
            IoOutput::Stdout => {
                let mut out = std::io::stdout().lock();
                out.write_all(bytes)?;
                out.flush()?;
            }
            IoOutput::Discard => {}
        }
        Ok(bytes.len())
    }

    pub fn read(&mut self, max: usize) -> Result<Vec<u8>, HalError> {
        if max == 0 {
            return Ok(Vec::new());
        }
        let got = match &mut self.input {
            IoInput::Buffer { data, pos } => {
                let n = max.min(data.len() - *pos);
                let chunk = data[*pos..*pos + n].to_vec();
                *pos += n;
                chunk
            }
            IoInput::Stdin => {
                let mut buf = vec![0; max];
                let n = std::io::stdin().lock().read(&mut buf)?;
                buf.truncate(n);
                buf
            }
        };
        if got.is_empty() {
            Err(HalError::EndOfInput)
        } else {
            Ok(got)
        }
    }

    pub fn captured(&self) -> &[u8] {
        match &self.output {
            IoOutput::Capture(buf) => buf,
            _ => &[],
        }
    }
}
